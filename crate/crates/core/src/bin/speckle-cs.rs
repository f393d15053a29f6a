fn main() {
    std::process::exit(speckle_cs::cli::run(std::env::args_os()));
}
