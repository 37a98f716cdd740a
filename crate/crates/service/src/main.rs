fn main() {
    std::process::exit(mbtcover::cli::main_with_args(std::env::args_os()));
}
