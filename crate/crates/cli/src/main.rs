fn main() {
    std::process::exit(context_tuning_cli::run(std::env::args_os().skip(1)));
}
