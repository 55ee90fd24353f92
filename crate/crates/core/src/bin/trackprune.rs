fn main() {
    std::process::exit(trackprune::cli::main_from_env());
}
