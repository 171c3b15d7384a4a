fn main() {
    std::process::exit(geoecon::main_with_args(std::env::args_os()));
}
