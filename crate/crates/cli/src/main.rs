fn main() {
    std::process::exit(dsfcn_cli::main_with(std::env::args_os()));
}
