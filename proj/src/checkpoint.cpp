#include "ehrisk/checkpoint.hpp"

#include "ehrisk/errors.hpp"

#include "json.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace ehrisk {

namespace {

constexpr std::string_view kMagic = "EHRCKPT\n";

template <typename T>
void put_le(std::string &out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
    }
}

void put_tensor(std::string &out, std::string_view name, const Matrix &t) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_le<std::uint32_t>(out, 2);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t.data()[i]));
    }
}

Matrix row_of(const std::vector<double> &values) {
    Matrix m(1, static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
        m(0, static_cast<Eigen::Index>(i)) = values[i];
    }
    return m;
}

class Reader {
  public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return value;
    }

    std::string_view take(std::size_t n) {
        need(n);
        const auto out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw InvalidInputError("checkpoint truncated at byte " + std::to_string(pos_));
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

nlohmann::json arch_to_json(const Architecture &a) {
    return { { "embed_dim", a.embed_dim }, { "heads", a.heads }, { "analyte_count", a.analyte_count }, { "max_length", a.max_length }, { "vocab_size", a.vocab_size }, { "ffn_dim", a.ffn_dim }, { "lab_hidden", a.lab_hidden } };
}

Architecture arch_from_json(const nlohmann::json &j) {
    Architecture a;
    a.embed_dim = j.at("embed_dim").get<std::size_t>();
    a.heads = j.at("heads").get<std::size_t>();
    a.analyte_count = j.at("analyte_count").get<std::size_t>();
    a.max_length = j.at("max_length").get<std::size_t>();
    a.vocab_size = j.at("vocab_size").get<std::size_t>();
    a.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    a.lab_hidden = j.at("lab_hidden").get<std::size_t>();
    return a;
}

}  // namespace

std::string serialize_checkpoint(const Model &model) {
    std::string out(kMagic);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    const nlohmann::json header{ { "arch", arch_to_json(model.params.arch) }, { "vocab", model.vocab.tokens() } };
    const std::string header_text = header.dump();
    put_le<std::uint64_t>(out, header_text.size());
    out += header_text;

    std::uint32_t count = 3;
    model.params.for_each([&](std::string_view, const Matrix &) { ++count; });
    put_le<std::uint32_t>(out, count);
    model.params.for_each([&](std::string_view name, const Matrix &t) { put_tensor(out, name, t); });
    put_tensor(out, "norm.mean", row_of(model.norm.mean));
    put_tensor(out, "norm.sd", row_of(model.norm.sd));
    put_tensor(out, "norm.age_mean", row_of({ model.norm.age_mean }));
    return out;
}

Model deserialize_checkpoint(std::string_view bytes) {
    Reader in(bytes);
    if (bytes.size() < kMagic.size() || in.take(kMagic.size()) != kMagic) {
        throw InvalidInputError("not a model checkpoint (bad magic)");
    }
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    const auto header_len = in.get<std::uint64_t>();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(in.take(static_cast<std::size_t>(header_len)));
    } catch (const nlohmann::json::exception &e) {
        throw InvalidInputError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    Model model;
    try {
        model.vocab = Vocabulary(header.at("vocab").get<std::vector<std::string>>());
        const Architecture arch = arch_from_json(header.at("arch"));
        if (arch.vocab_size != model.vocab.size()) {
            throw InvalidInputError("checkpoint vocabulary size disagrees with its architecture");
        }
        model.params = ModelParams::zeros(arch);
    } catch (const nlohmann::json::exception &e) {
        throw InvalidInputError(std::string("checkpoint header is incomplete: ") + e.what());
    }

    std::map<std::string, Matrix, std::less<>> tensors;
    const auto count = in.get<std::uint32_t>();
    for (std::uint32_t n = 0; n < count; ++n) {
        std::string name(in.take(in.get<std::uint32_t>()));
        const auto rank = in.get<std::uint32_t>();
        if (rank != 2) {
            throw InvalidInputError("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
        }
        const auto rows = in.get<std::uint64_t>();
        const auto cols = in.get<std::uint64_t>();
        if (rows > bytes.size() || cols > bytes.size() || rows * cols * 8 > bytes.size()) {
            throw InvalidInputError("tensor '" + name + "' shape exceeds the file size");
        }
        Matrix t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            t.data()[i] = std::bit_cast<double>(in.get<std::uint64_t>());
        }
        tensors.emplace(std::move(name), std::move(t));
    }
    if (!in.done()) {
        throw InvalidInputError("trailing bytes after the last tensor");
    }

    auto take_tensor = [&](std::string_view name, Eigen::Index rows, Eigen::Index cols) -> Matrix {
        const auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw InvalidInputError("checkpoint is missing tensor '" + std::string(name) + "'");
        }
        if (it->second.rows() != rows || it->second.cols() != cols) {
            throw InvalidInputError("tensor '" + std::string(name) + "' has the wrong shape");
        }
        return it->second;
    };
    model.params.for_each([&](std::string_view name, Matrix &t) { t = take_tensor(name, t.rows(), t.cols()); });

    const auto k = static_cast<Eigen::Index>(model.params.arch.analyte_count);
    const Matrix mean = take_tensor("norm.mean", 1, k);
    const Matrix sd = take_tensor("norm.sd", 1, k);
    model.norm.mean.assign(mean.data(), mean.data() + k);
    model.norm.sd.assign(sd.data(), sd.data() + k);
    model.norm.age_mean = take_tensor("norm.age_mean", 1, 1)(0, 0);
    return model;
}

void save_checkpoint(const Model &model, const std::filesystem::path &path) {
    const std::string bytes = serialize_checkpoint(model);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out.flush()) {
            throw StorageError("cannot write checkpoint " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw StorageError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
    }
}

namespace {

std::string read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw StorageError("cannot open " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

}  // namespace

Model load_checkpoint(const std::filesystem::path &path) {
    return deserialize_checkpoint(read_file(path));
}

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * length);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

std::string checkpoint_digest(const std::filesystem::path &path) {
    return sha256_hex(read_file(path));
}

}  // namespace ehrisk
