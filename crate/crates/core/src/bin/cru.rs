fn main() {
    std::process::exit(cru::cli::run());
}
