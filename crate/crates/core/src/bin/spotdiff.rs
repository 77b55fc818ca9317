fn main() {
    std::process::exit(spotdiff::cli::main());
}
