fn main() {
    std::process::exit(spinemorph::cli::run(std::env::args_os()));
}
