fn main() {
    std::process::exit(fgmpc::cli::main());
}
