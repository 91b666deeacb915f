fn main() {
    std::process::exit(hfn_cli::run(std::env::args_os()));
}
