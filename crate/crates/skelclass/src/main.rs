fn main() {
    std::process::exit(skelclass::cli::run());
}
