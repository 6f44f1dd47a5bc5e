fn main() {
    std::process::exit(refuel_cli::dispatch(std::env::args_os()));
}
