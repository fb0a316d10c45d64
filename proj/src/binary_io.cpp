#include "binary_io.hpp"

#include <fstream>
#include <iterator>
#include <system_error>

namespace apt::detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoFailure("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw IoFailure("read error on " + path.string());
    }
    return bytes;
}

namespace {

void write_raw_atomic(const std::filesystem::path& path, const char* data, std::size_t size) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoFailure("cannot open " + tmp.string() + " for writing");
        }
        out.write(data, static_cast<std::streamsize>(size));
        out.flush();
        if (!out) {
            throw IoFailure("write error on " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoFailure("cannot rename " + tmp.string() + " to " + path.string());
    }
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    write_raw_atomic(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
    write_raw_atomic(path, text.data(), text.size());
}

}  // namespace apt::detail
