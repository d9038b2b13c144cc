fn main() {
    std::process::exit(sdeforecast::cli::main(std::env::args_os()));
}
