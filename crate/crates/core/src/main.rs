fn main() {
    std::process::exit(hte_policy::cli::run(std::env::args_os()));
}
