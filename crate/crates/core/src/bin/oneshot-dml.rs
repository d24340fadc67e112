fn main() {
    std::process::exit(oneshot_dml::cli::run(std::env::args_os()));
}
