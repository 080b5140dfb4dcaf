fn main() {
    std::process::exit(tfgb::cli::run());
}
