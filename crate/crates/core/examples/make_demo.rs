//! Regenerate the bundled demo assets: `cargo run -p semgest-core --example make_demo -- <dir>`.

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "assets/demo".into());
    if let Err(e) = semgest_core::demo::write_demo(std::path::Path::new(&dir)) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    println!("wrote demo assets to {dir}");
}
