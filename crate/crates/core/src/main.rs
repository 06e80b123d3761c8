fn main() {
    std::process::exit(masc_core::cli::main());
}
