#include "humus/metrics.hpp"

#include <json.hpp>

namespace humus {

using nlohmann::json;

void MetricReport::finalize() {
    ssim = psnr = nmse = 0;
    if (per_slice.empty()) return;
    for (const auto& m : per_slice) {
        ssim += m.ssim;
        psnr += m.psnr;
        nmse += m.nmse;
    }
    const double n = double(per_slice.size());
    ssim /= n;
    psnr /= n;
    nmse /= n;
}

std::string report_to_json(const MetricReport& r) {
    json j;
    j["ssim"] = r.ssim;
    j["psnr"] = r.psnr;
    j["nmse"] = r.nmse;
    j["data_range"] = r.data_range;
    json slices = json::array();
    for (const auto& m : r.per_slice)
        slices.push_back({{"ssim", m.ssim}, {"psnr", m.psnr}, {"nmse", m.nmse}});
    j["per_slice"] = slices;
    return j.dump(2);
}

MetricReport report_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(sstr("bad metric report json: ", e.what()));
    }
    MetricReport r;
    r.ssim = j.at("ssim").get<double>();
    r.psnr = j.at("psnr").get<double>();
    r.nmse = j.at("nmse").get<double>();
    r.data_range = j.at("data_range").get<double>();
    for (const auto& m : j.at("per_slice"))
        r.per_slice.push_back({m.at("ssim").get<double>(), m.at("psnr").get<double>(),
                               m.at("nmse").get<double>()});
    return r;
}

}  // namespace humus
