fn main() {
    std::process::exit(udtw::cli::run());
}
