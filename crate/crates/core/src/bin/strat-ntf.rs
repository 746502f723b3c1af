fn main() {
    std::process::exit(strat_ntf::cli::run(std::env::args_os()));
}
