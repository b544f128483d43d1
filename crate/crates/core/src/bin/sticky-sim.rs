fn main() {
    std::process::exit(sticky_core::cli::run(std::env::args()));
}
