fn main() {
    std::process::exit(maskdistill::cli::main());
}
