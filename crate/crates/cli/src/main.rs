fn main() {
    std::process::exit(cat_cli::main_with(std::env::args_os()));
}
