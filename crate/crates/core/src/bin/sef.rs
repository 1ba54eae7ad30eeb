fn main() {
    std::process::exit(sef::cli::dispatch(std::env::args_os()));
}
