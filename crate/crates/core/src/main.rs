fn main() {
    std::process::exit(vidstyle::cli::main_with_args(std::env::args_os()));
}
