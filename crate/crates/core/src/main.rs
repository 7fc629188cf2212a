fn main() {
    mtsnn::cli::init_logging();
    std::process::exit(mtsnn::cli::run(std::env::args()));
}
