fn main() {
    std::process::exit(bayes_uq::cli::run(std::env::args_os()));
}
