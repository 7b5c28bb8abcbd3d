fn main() {
    std::process::exit(usbmode::cli::run(std::env::args_os()));
}
