fn main() {
    std::process::exit(kinebasis_cli::run(std::env::args_os()));
}
