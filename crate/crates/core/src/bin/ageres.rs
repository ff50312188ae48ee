fn main() {
    std::process::exit(ageres::cli::run(std::env::args_os()));
}
