fn main() {
    std::process::exit(inpaint_dpo::cli::run(std::env::args_os()));
}
