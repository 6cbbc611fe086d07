fn main() {
    std::process::exit(switchsel_cli::app::run(std::env::args_os()));
}
