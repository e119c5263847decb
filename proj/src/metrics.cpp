#include "osad/metrics.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace osad::metrics {

using nlohmann::json;

MetricsReport aggregate(const std::vector<ImageRecord>& records, int fold) {
    MetricsReport r;
    r.fold_id = fold;
    r.count = records.size();
    if (records.empty()) return r;
    for (const auto& rec : records) {
        r.iou += rec.iou;
        r.mae += rec.mae;
        r.e_phi += rec.e_phi;
        r.cc += rec.cc;
        for (const auto& f : rec.flags)
            if (f == "cc_degenerate") ++r.degenerate_cc;
    }
    const double n = static_cast<double>(records.size());
    r.iou /= n;
    r.mae /= n;
    r.e_phi /= n;
    r.cc /= n;
    return r;
}

void write_report(std::ostream& os, const std::vector<ImageRecord>& records, const MetricsReport& agg) {
    for (const auto& r : records) {
        json j = {{"record", "image"}, {"fold", r.fold},   {"episode_id", r.episode_id},
                  {"image_id", r.image_id}, {"iou", r.iou}, {"mae", r.mae},
                  {"e_phi", r.e_phi},   {"cc", r.cc},     {"flags", r.flags}};
        os << j.dump() << '\n';
    }
    json a = {{"record", "aggregate"}, {"fold", agg.fold_id}, {"count", agg.count},
              {"iou", agg.iou},        {"mae", agg.mae},      {"e_phi", agg.e_phi},
              {"cc", agg.cc},          {"degenerate_cc", agg.degenerate_cc}};
    os << a.dump() << '\n';
}

void write_report(const std::string& path, const std::vector<ImageRecord>& records, const MetricsReport& agg) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write report " + path);
    write_report(os, records, agg);
}

ParsedReport read_report(std::istream& is) {
    ParsedReport out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = json::parse(line);
        if (j.at("record") == "image") {
            ImageRecord r;
            r.fold = j.at("fold");
            r.episode_id = j.at("episode_id");
            r.image_id = j.at("image_id");
            r.iou = j.at("iou");
            r.mae = j.at("mae");
            r.e_phi = j.at("e_phi");
            r.cc = j.at("cc");
            r.flags = j.at("flags").get<std::vector<std::string>>();
            out.records.push_back(std::move(r));
        } else {
            auto& a = out.aggregate;
            a.fold_id = j.at("fold");
            a.count = j.at("count");
            a.iou = j.at("iou");
            a.mae = j.at("mae");
            a.e_phi = j.at("e_phi");
            a.cc = j.at("cc");
            a.degenerate_cc = j.at("degenerate_cc");
        }
    }
    return out;
}

ParsedReport read_report(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read report " + path);
    return read_report(is);
}

}  // namespace osad::metrics
