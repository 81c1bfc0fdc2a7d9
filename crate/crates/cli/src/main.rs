fn main() {
    std::process::exit(ustlab_cli::main_from(std::env::args_os()));
}
