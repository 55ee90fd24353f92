//! The prompt templates: listing placeholders, rendering with bindings,
//! conditional sections, and overriding a built-in from a directory.
//!
//! cargo run --example prompt_templates

use trackprune::reasoner::{Binding, Bindings, PromptTemplate, TemplateId, TemplateSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let builtin = TemplateSet::builtin();
    for id in TemplateId::ALL {
        let names: Vec<String> = builtin
            .get(id)
            .placeholders()
            .into_iter()
            .map(|(n, kind)| format!("{n}:{kind}"))
            .collect();
        println!("{:<24} {}", id.file_name(), names.join(" "));
    }

    // fill every slot of the selection prompt with something recognisable
    let select = builtin.get(TemplateId::Select);
    let mut b = Bindings::new();
    for (name, kind) in select.placeholders() {
        let value = match kind {
            "flag" => Binding::Flag(name == "binary"),
            _ => Binding::Text(format!("<{name}>")),
        };
        b.insert(name, value);
    }
    b.insert("query".into(), "the dog that jumps over the fence".into());
    println!(
        "\n--- select, final round ---\n{}",
        builtin.render(TemplateId::Select, &b)?
    );

    let t = PromptTemplate::parse(
        TemplateId::Referring,
        "Query: {{query}}\n{{#hint}}Hint: look for small objects.\n{{/hint}}{{^hint}}No hint.\n{{/hint}}",
    )?;
    for hint in [true, false] {
        let b = Bindings::from([
            ("query".to_string(), "the bird".into()),
            ("hint".to_string(), hint.into()),
        ]);
        print!(
            "\nhint={hint}:\n{}",
            trackprune::reasoner::render_prompt(&t, &b)?
        );
    }
    let missing = trackprune::reasoner::render_prompt(
        &t,
        &Bindings::from([("hint".to_string(), true.into())]),
    );
    println!("\nwithout a query: {}", missing.unwrap_err());

    // a directory may override any subset of the templates, but each
    // override must keep the built-in's placeholders
    let dir = std::env::temp_dir().join("trackprune-templates");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join(TemplateId::Referring.file_name()),
        "Name the objects in: {{query}}\nAnswer in JSON.",
    )?;
    match TemplateSet::load_dir(&dir) {
        Ok(set) => println!(
            "\noverride loaded:\n{}",
            set.get(TemplateId::Referring).body
        ),
        Err(e) => println!("\noverride rejected: {e}"),
    }
    std::fs::write(
        dir.join(TemplateId::Referring.file_name()),
        "Name the objects in: {{question}}",
    )?;
    println!(
        "\nwith a renamed placeholder: {}",
        TemplateSet::load_dir(&dir).unwrap_err()
    );
    Ok(())
}
