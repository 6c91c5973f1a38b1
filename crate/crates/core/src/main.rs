fn main() {
    std::process::exit(onecast::cli::main_exit_code());
}
