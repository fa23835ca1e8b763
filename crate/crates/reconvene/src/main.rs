fn main() {
    std::process::exit(reconvene::cli::run());
}
