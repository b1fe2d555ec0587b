fn main() {
    std::process::exit(relattice::cli::main_entry());
}
