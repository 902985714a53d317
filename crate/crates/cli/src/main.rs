fn main() {
    std::process::exit(flowline_cli::run(std::env::args_os()));
}
