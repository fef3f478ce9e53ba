fn main() {
    std::process::exit(igcd::cli::main_with(std::env::args_os()));
}
