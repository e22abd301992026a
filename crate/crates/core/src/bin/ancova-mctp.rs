fn main() {
    std::process::exit(ancova_mctp::cli::main());
}
