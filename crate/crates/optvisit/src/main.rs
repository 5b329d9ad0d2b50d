fn main() {
    std::process::exit(optvisit::cli::run());
}
