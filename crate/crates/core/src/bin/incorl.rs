fn main() {
    std::process::exit(incorl::cli::main());
}
