fn main() {
    std::process::exit(t2t::cli::run(std::env::args_os()));
}
