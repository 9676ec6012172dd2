fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(sle_lab::cli::run(&argv));
}
