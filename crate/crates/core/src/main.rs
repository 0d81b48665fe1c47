fn main() {
    std::process::exit(pro_refine::cli::run(std::env::args_os()));
}
