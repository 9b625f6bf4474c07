#include "hmte/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace hmte {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& what) {
    throw std::runtime_error("checkpoint " + path.string() + ": " + what);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text, const ParamStore& store) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << kCheckpointMagic << '\n';
    out << "config " << config_text.size() << '\n' << config_text;
    out << "params " << store.size() << '\n';
    std::vector<double> buf;
    for (const auto& [name, value] : store.entries()) {
        out << name << ' ' << value.ndim();
        for (Index d : value.shape()) out << ' ' << d;
        out << '\n';
        buf.assign(value.data().data(), value.data().data() + value.size());
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointMagic) corrupt(path, "missing " + std::string(kCheckpointMagic) + " header");

    Checkpoint ck;
    std::string tag;
    std::size_t bytes = 0;
    if (!(in >> tag >> bytes) || tag != "config" || in.get() != '\n') corrupt(path, "bad config section");
    ck.config_text.resize(bytes);
    if (!in.read(ck.config_text.data(), static_cast<std::streamsize>(bytes))) corrupt(path, "truncated config");

    std::size_t count = 0;
    if (!(in >> tag >> count) || tag != "params" || in.get() != '\n') corrupt(path, "bad params section");
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) corrupt(path, "truncated parameter header");
        std::istringstream hs(line);
        std::string name;
        Index ndim = 0;
        if (!(hs >> name >> ndim) || ndim < 1) corrupt(path, "bad parameter header '" + line + "'");
        Shape shape(static_cast<std::size_t>(ndim));
        for (auto& d : shape) {
            if (!(hs >> d) || d <= 0) corrupt(path, "bad shape for " + name);
        }
        std::vector<double> raw(static_cast<std::size_t>(numel(shape)));
        if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(double)))) {
            corrupt(path, "truncated data for " + name);
        }
        Buffer data(static_cast<Index>(raw.size()));
        for (std::size_t k = 0; k < raw.size(); ++k) data[static_cast<Index>(k)] = static_cast<Real>(raw[k]);
        ck.params.push_back({name, Tensor(shape, std::move(data))});
    }
    return ck;
}

void restore_params(const Checkpoint& checkpoint, ParamStore& store) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& p : checkpoint.params) by_name[p.name] = &p.value;
    if (by_name.size() != store.size()) {
        throw std::runtime_error("checkpoint holds " + std::to_string(by_name.size()) + " parameters, model has " +
                                 std::to_string(store.size()));
    }
    for (const auto& [name, value] : store.entries()) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint lacks parameter " + name);
        if (it->second->shape() != value.shape()) {
            throw ShapeError("checkpoint parameter " + name + " has shape " + to_string(it->second->shape()) +
                             ", model expects " + to_string(value.shape()));
        }
        Tensor target = value;
        target.mutable_data() = it->second->data();
    }
}

}  // namespace hmte
