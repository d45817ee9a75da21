fn main() {
    std::process::exit(impstab_cli::run(std::env::args_os()));
}
