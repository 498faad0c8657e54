use qemctl::cli;

fn main() {
    std::process::exit(cli::run());
}
