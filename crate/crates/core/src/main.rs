use std::io::Write;

fn main() {
    let out = mftn::cli::dispatch(std::env::args().skip(1));
    if !out.text.is_empty() {
        let mut so = std::io::stdout().lock();
        let _ = so.write_all(out.text.as_bytes());
    }
    std::process::exit(out.code);
}
