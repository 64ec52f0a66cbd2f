fn main() {
    std::process::exit(vpsband::cli::run());
}
