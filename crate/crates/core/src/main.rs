fn main() {
    std::process::exit(pwdyn::main_entry());
}
