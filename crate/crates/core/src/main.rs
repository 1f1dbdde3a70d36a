fn main() {
    std::process::exit(dqsim::cli::main());
}
