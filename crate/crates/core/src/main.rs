fn main() {
    std::process::exit(thirdeye::cli::main(std::env::args_os()));
}
