fn main() {
    std::process::exit(jafr::run_cli());
}
