fn main() {
    std::process::exit(avda::cli::cli_main(std::env::args_os()));
}
