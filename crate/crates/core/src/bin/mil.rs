fn main() {
    std::process::exit(milearn::cli::main());
}
