fn main() {
    let args: Vec<String> = std::env::args().collect();
    let threads = std::env::var("FINSLER_THREADS").ok();
    let out = finsler_cli::run(&args, threads.as_deref());
    std::process::exit(out);
}
