fn main() {
    std::process::exit(tpsep::cli::run());
}
